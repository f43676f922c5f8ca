#!/usr/bin/env python3
# Copyright 2026, the gtsa authors, All Rights Reserved
import sys

from gtsa.cli import main

sys.exit(main())
