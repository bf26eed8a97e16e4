import sys

from semedge.cli import main

sys.exit(main())
