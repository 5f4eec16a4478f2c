import sys

from kpitrack.main import main

sys.exit(main())
