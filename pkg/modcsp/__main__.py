import sys

from modcsp.cli import main

sys.exit(main())
