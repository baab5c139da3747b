import sys

from prepack.cli import main

sys.exit(main())
