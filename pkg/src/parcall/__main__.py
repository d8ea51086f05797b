from parcall.cli import main
import sys

sys.exit(main())
