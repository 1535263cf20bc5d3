from rise.cli import main

main()
