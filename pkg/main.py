from src.app.cli import scout


def main():
    """
    Entry point of the scout toolkit.

    Subcommands (see `python main.py --help`):
      - export:   write the configured POMDP as a .pomdp file
      - solve:    run point-based value iteration, write the alpha set
      - simulate: run one seeded search episode, optionally rendering the belief
      - bench:    compare policies over shared-seed batches, write metrics
    """
    scout(prog_name="scout")


if __name__ == "__main__":
    main()
