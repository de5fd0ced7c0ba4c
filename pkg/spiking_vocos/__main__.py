import sys

from spiking_vocos.cli import main

sys.exit(main())
