import sys

from p2pswarm.cli import main

sys.exit(main())
