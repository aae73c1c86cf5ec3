from zbdetect.cli import main

raise SystemExit(main())
