import sys

from quantpi.cli import main

sys.exit(main())
