from dfadkd.cli import main
import sys

sys.exit(main())
