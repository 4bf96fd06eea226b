import sys

from terraincl.cli import main

sys.exit(main())
