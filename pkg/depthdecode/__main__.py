"""Allow `python -m depthdecode`."""
from .cli import main

main()
