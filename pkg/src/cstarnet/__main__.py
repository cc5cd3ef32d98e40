from cstarnet.cli import main

raise SystemExit(main())
