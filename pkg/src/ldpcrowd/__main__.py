import sys

from ldpcrowd.cli import main

sys.exit(main())
