import sys

from gmvq.cli import main

sys.exit(main())
