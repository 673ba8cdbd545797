from dynatherm.cli import main

main()
