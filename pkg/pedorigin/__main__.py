import sys

from pedorigin.cli import main

sys.exit(main())
