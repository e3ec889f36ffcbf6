import sys

from mixlink_toolbox.cli.main import main

sys.exit(main())
