import sys

from krflow.cli import main

sys.exit(main())
