from sparsepass.cli import main

raise SystemExit(main())
