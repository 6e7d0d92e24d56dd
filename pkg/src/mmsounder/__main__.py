import sys

from mmsounder.cli import main

sys.exit(main())
