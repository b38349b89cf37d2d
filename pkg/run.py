"""
Run script for cfhet
Convenience script to run a command-line command from the project root
"""

import os
import signal
import sys
import threading
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.absolute()
sys.path.insert(0, str(project_root))

_shutdown_event = threading.Event()


def signal_handler(sig, frame):
    """Handle Ctrl+C: first press interrupts the run, second press exits at once"""
    if _shutdown_event.is_set():
        print("\nForce exit...", file=sys.stderr)
        os._exit(130)
    _shutdown_event.set()
    raise KeyboardInterrupt


if __name__ == '__main__':
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)

    from estimation.cli import main

    sys.exit(main(sys.argv[1:]))
