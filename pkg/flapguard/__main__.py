import sys

from flapguard.cli.main import main

sys.exit(main())
