import sys

from diffknap.cli import main

sys.exit(main())
