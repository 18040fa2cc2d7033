def pytest_addoption(parser):
    parser.addoption("--riiu-cli", default="", help="path to the riiu executable")
