import logging
import sys

from cli.router import dispatch, parse_args

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    if isinstance(args, int):
        return args
    configure_logging(args.log_level)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
