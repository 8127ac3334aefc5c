"""Run the numerical property suites and show the verdict table.

Run: python3 demos/property_checks.py [suite,...]
"""
from __future__ import annotations

import sys

from cbso import checks

names = checks.parse_suite(sys.argv[1]) if len(sys.argv) > 1 else list(checks.DEFAULT_SUITE)
rep = checks.run_suites(names)
for r in rep.rows:
    print(f"{'pass' if r.passed else 'FAIL'}  {r.name:45s} measured {r.measured:.4g}  bound {r.bound:.4g}  {r.detail}")

# the planted check declares the wrong Lipschitz constant for |x| and must fail
planted = checks.run_suites(["planted"])
print(f"planted wrong-constant check detected: {not planted.passed}")
