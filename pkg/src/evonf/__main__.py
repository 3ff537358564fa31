import sys

from evonf.cli import main

sys.exit(main())
