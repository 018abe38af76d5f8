from esig_module.cli import cli_mode

if __name__ == "__main__":
    cli_mode()
