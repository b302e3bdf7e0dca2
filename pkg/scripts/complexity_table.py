#!/usr/bin/env python3
"""Parameter and MAC census for the toy and full-scale encoder configs.

    python3 scripts/complexity_table.py
"""

from ffcac.config import ExperimentConfig, ast_base_config
from ffcac.encoder import count_params_macs


def main():
    toy = ExperimentConfig().encoder_config()
    rows = [
        ("toy (L=2, D=32)", count_params_macs(toy, num_classes=10)),
        ("full scale (L=12, D=768)", count_params_macs(ast_base_config(), num_classes=100)),
    ]
    print(f"{'config':<26}{'params':>14}{'extractor':>14}{'classifier':>12}{'MACs/clip':>16}")
    for name, r in rows:
        print(f"{name:<26}{r.num_params:>14,}{r.num_params_extractor:>14,}"
              f"{r.num_params_classifier:>12,}{r.macs:>16,}")


if __name__ == "__main__":
    main()
