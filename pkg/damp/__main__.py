from damp.main import main

main()
