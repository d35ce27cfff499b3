import sys

from cheblap.cli import main

sys.exit(main())
