import sys

from memloop.cli import main

sys.exit(main())
