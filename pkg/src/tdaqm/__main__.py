import sys

from tdaqm.cli import main

sys.exit(main())
