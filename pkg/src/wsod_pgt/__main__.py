import sys

from wsod_pgt.cli import main

sys.exit(main())
