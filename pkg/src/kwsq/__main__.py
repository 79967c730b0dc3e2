import sys

from kwsq.cli import main

sys.exit(main())
