#!/usr/bin/env python3
"""
ISTN Coverage Toolkit - Launcher Script
"""

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent


def check_dependencies():
    """Check if required dependencies are installed"""
    try:
        import numpy
        import scipy
        import pandas
        import joblib
        import tqdm
        return True
    except ImportError as e:
        print(f"❌ Missing dependency: {e}")
        return False


def install_dependencies():
    """Install required dependencies"""
    print("📦 Installing dependencies...")
    try:
        subprocess.run([
            sys.executable, "-m", "pip", "install",
            "-r", str(ROOT / "requirements.txt")
        ], check=True)
        print("✅ Dependencies installed successfully")
        return True
    except subprocess.CalledProcessError:
        print("❌ Failed to install dependencies")
        return False


def check_configs():
    """Check that the tier presets and the recipes are in place"""
    presets = ROOT / "configs" / "presets.json"
    if not presets.exists():
        print(f"⚠️  Warning: {presets.relative_to(ROOT)} not found!")
        print("Tier presets cannot be expanded without it.")
        return False
    recipes = sorted((ROOT / "configs" / "recipes").glob("*.json"))
    if not recipes:
        print("⚠️  Warning: No recipes found in configs/recipes/")
        return False
    return True


def main():
    """Main launcher function"""
    if not check_dependencies():
        print("\n📦 Installing missing dependencies...")
        if not install_dependencies():
            print("❌ Cannot proceed without dependencies. Please install manually.")
            sys.exit(1)

    if not check_configs():
        sys.exit(2)

    sys.path.append(str(ROOT / "app"))
    from cli import main as cli_main

    try:
        sys.exit(cli_main(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\n👋 Run stopped by user")
        sys.exit(1)


if __name__ == "__main__":
    main()
