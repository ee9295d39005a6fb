#!/usr/bin/env python3
"""
Run script for the frechet-tame toolkit
Runs every task of a config file with setup checks and error handling.
"""

import os
import sys
import signal
import logging
from pathlib import Path

DEFAULT_CONFIG = os.path.join('configs', 'acceptance.json')


def signal_handler(sig, frame):
    """Handle shutdown signals gracefully."""
    print('\n🛑 Run interrupted...')
    print('👋 Goodbye!')
    sys.exit(130)


def check_setup(config_path):
    """Check if the workspace is set up."""
    issues = []

    if not os.path.exists(config_path):
        issues.append(f"❌ Config file '{config_path}' not found")

    for directory in ['data', 'logs']:
        if not Path(directory).exists():
            issues.append(f"❌ Directory '{directory}' not found. Run: python setup.py")

    return issues


def main():
    """Main run function."""
    config_path = sys.argv[1] if len(sys.argv) > 1 else os.getenv('FRECHET_CONFIG', DEFAULT_CONFIG)
    print("🧮 Starting frechet-tame run...")
    print("=" * 40)

    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)

    issues = check_setup(config_path)
    if issues:
        print("⚠️  Setup issues detected:")
        for issue in issues:
            print(f"   {issue}")
        print("\n💡 Please run: python setup.py")
        return 1

    try:
        from main import main as frechet_main
        return frechet_main(['run', '--config', config_path] + sys.argv[2:])

    except KeyboardInterrupt:
        print('\n🛑 Run stopped by user')
        return 130

    except ImportError as e:
        print(f"❌ Import error: {e}")
        print("💡 Please run: python setup.py")
        return 1

    except Exception as e:
        print(f"❌ Unexpected error: {e}")
        logging.exception("Unexpected error occurred")
        return 1


if __name__ == '__main__':
    sys.exit(main())
