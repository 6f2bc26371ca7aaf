import sys

from ktuplet.cli import main

sys.exit(main())
