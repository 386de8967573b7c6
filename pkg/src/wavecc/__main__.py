from wavecc.cli import main

main()
