#!/usr/bin/env python3
"""
Lambda-CI Acceptance Runner
Runs the acceptance criteria and writes their CSVs under the output directory
"""

import sys
import time
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from lambda_ci import AcceptanceSuite, config, write_csv
from lambda_ci.utils import calculate_processing_time


def run_acceptance(criteria=None, preset='desk'):
    """Run the acceptance suite and write one CSV per criterion"""
    print("Starting Acceptance Suite")
    print("=" * 60)

    try:
        suite = AcceptanceSuite(preset=preset)
        results = suite.run_all(criteria)

        out_dir = config.DIRECTORIES['output'] / 'acceptance'
        for name in results['criteria']:
            write_csv(results['results'][name]['rows'], out_dir / f"{name}.csv")
        write_csv(results['summary'], out_dir / 'summary.csv')

        stats = results['stats']
        print(f"\nCriteria run: {stats['criteria_run']}")
        print(f"   - Passed: {stats['passed']}")
        print(f"   - Failed: {stats['failed']}")
        print(f"   - Errors: {stats['errors']}")
        for name, elapsed in stats['elapsed'].items():
            print(f"   - {name}: {elapsed}")
        return results['success']

    except Exception as e:
        print(f"\nAcceptance suite error: {e}")
        return False


def main():
    """Main acceptance runner"""
    print("LAMBDA-CI ACCEPTANCE")
    print("=" * 60)

    # Validate configuration
    if not config.validate_config():
        print("Configuration validation failed. Please check your setup.")
        sys.exit(1)

    config.print_config_summary()

    # Optional criterion names on the command line
    criteria = sys.argv[1:] or None
    if criteria:
        print(f"Criteria: {', '.join(criteria)}")
    else:
        print("Running every criterion")

    start_time = time.time()
    success = run_acceptance(criteria)
    time_str = calculate_processing_time(start_time)

    print("\n" + "=" * 60)
    if success:
        print("ACCEPTANCE PASSED!")
        print(f"Total processing time: {time_str}")
    else:
        print("ACCEPTANCE FAILED!")
        print(f"Processing time before failure: {time_str}")
    print("=" * 60)

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
