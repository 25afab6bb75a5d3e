import sys

from daffpinn.cli import main

sys.exit(main())
