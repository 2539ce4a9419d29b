import sys

from mindisp.cli import main

sys.exit(main())
