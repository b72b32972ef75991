import logging

logger = logging.getLogger("ic_dbm")
logger.setLevel(logging.INFO)

handler = logging.StreamHandler()
formatter = logging.Formatter('%(asctime)s — %(levelname)s — %(message)s')
handler.setFormatter(formatter)

logger.addHandler(handler)


def set_verbose(verbose: bool) -> None:
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def debug_patch_log(site_id, level, before: bytes, after: bytes):
    # Same shape as the CLI's patch-demo output, for -v runs.
    logger.debug("IC %s patched at -O%s", site_id, level)
    logger.debug("    before: %s", before.hex(" "))
    logger.debug("    after:  %s", after.hex(" "))
