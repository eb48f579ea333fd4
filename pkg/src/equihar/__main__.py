import sys

from equihar.cli import main

sys.exit(main())
