#!/usr/bin/env python3
"""
Entry point: `python main.py` serves the HTTP API, `python main.py <command> ...` runs the CLI.
"""
import sys
import os

# Add the current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    if len(sys.argv) > 1:
        from app.cli import main
        sys.exit(main())

    import uvicorn
    from app.core.config import settings
    from app.main import app

    uvicorn.run(app, host="0.0.0.0", port=settings.PORT)
