import sys

from linecp.cli import main

sys.exit(main())
