from dllm_budget.cli import main

raise SystemExit(main())
