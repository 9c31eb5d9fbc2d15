import sys

from peng_cde.cli import main

sys.exit(main())
