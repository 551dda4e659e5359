#!/usr/bin/env python
# -*- coding: utf-8 -*-

import sys
import os
import argparse
import logging
from dataclasses import replace
from colorama import Fore, Style
import coloredlogs

from . import formats
from . import pipeline
from .config import ConfigParser
from .sampling import SUPPORTED_STRATEGIES
from .synthetic import (
    CALIBRATION_FILE,
    build_rig,
    corrupt_observations,
    generate_scene,
    write_scene,
)

__version__ = '0.1.0'
__license__ = "MIT"

EXIT_USAGE = 1
EXIT_DATA = 2


def banner():
    print(f"""{Fore.LIGHTMAGENTA_EX}
██████╗  ██████╗ ██╗  ██╗ ██████╗███████╗██████╗ ████████╗
██╔══██╗██╔═══██╗╚██╗██╔╝██╔════╝██╔════╝██╔══██╗╚══██╔══╝
██████╔╝██║   ██║ ╚███╔╝ ██║     █████╗  ██████╔╝   ██║
██╔══██╗██║   ██║ ██╔██╗ ██║     ██╔══╝  ██╔══██╗   ██║
██████╔╝╚██████╔╝██╔╝ ██╗╚██████╗███████╗██║  ██║   ██║
╚═════╝  ╚═════╝ ╚═╝  ╚═╝ ╚═════╝╚══════╝╚═╝  ╚═╝   ╚═╝
 Version: {__version__}
{Style.RESET_ALL}
{Fore.LIGHTWHITE_EX}
Boxcert corrects and certifies stereo box pose and shape estimates.
Happy Labelling!
{Style.RESET_ALL}""")


class BoxcertArgumentParser(argparse.ArgumentParser):
    """ ArgumentParser that exits with the usage error code """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def require_paths(parser: argparse.ArgumentParser, **paths) -> None:
    """
    Fails with a usage error if an input path given as a flag does not exist.

    :param parser: Parser reporting the error
    :param paths: Flag name to path
    :return: None
    """
    for flag, path in paths.items():
        if path is not None and not os.path.exists(path):
            parser.error(f"argument --{flag.replace('_', '-')}: [{path}] does not exist")


def build_parser() -> argparse.ArgumentParser:
    parser = BoxcertArgumentParser(prog="boxcert")
    logging_group = parser.add_mutually_exclusive_group()
    parser.add_argument(
        "--version",
        action="version",
        help="Print Boxcert version",
        version="%(prog)s " + __version__
    )
    logging_group.add_argument(
        "--debug",
        help="Enable debug mode",
        action="store_true"
    )
    logging_group.add_argument(
        "--suppress",
        help="Suppress banner and logging",
        action="store_true"
    )
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    synth = commands.add_parser("synth", help="Generate synthetic scenes, detections and masks")
    synth.add_argument("--config", required=True, help="Scene configuration file path")
    synth.add_argument("--count", required=True, type=int, help="Number of scenes")
    synth.add_argument("--out", required=True, help="Output directory")

    estimate = commands.add_parser("estimate", help="Solve box pose and shape for every detection file")
    estimate.add_argument("--detections", required=True, help="Detection file or directory")
    estimate.add_argument("--calib", required=True, help="Stereo calibration file path")
    estimate.add_argument("--config", required=True, help="Run configuration file path")
    estimate.add_argument("--out", required=True, help="Results file path")
    estimate.add_argument("--workers", type=int, default=None, help="Worker processes, overrides the configuration")

    certify = commands.add_parser("certify", help="Certify solved frames and select pseudo-labels")
    certify.add_argument("--results", required=True, help="Results file path")
    certify.add_argument("--masks", required=True, help="Directory of <frame_id>_<view>.pgm masks")
    certify.add_argument("--thresholds", required=True, help="Threshold configuration file path")
    certify.add_argument("--out", required=True, help="Reports file path")
    certify.add_argument(
        "--mask-source",
        default="external_files",
        choices=pipeline.RunConfig.SUPPORTED_MASK_SOURCES,
        help="Provenance of the masks, recorded in the reports"
    )
    certify.add_argument("--workers", type=int, default=1, help="Worker processes")

    pseudo_label = commands.add_parser("pseudo-label", help="Write the pseudo-label dataset of certified frames")
    pseudo_label.add_argument("--reports", required=True, help="Reports file path")
    pseudo_label.add_argument("--out", required=True, help="Dataset file path")

    prompts = commands.add_parser("sample-prompts", help="Write segmentation point prompts of solved frames")
    prompts.add_argument("--results", required=True, help="Results file path")
    prompts.add_argument("--strategy", required=True, choices=SUPPORTED_STRATEGIES, help="Sampling strategy")
    prompts.add_argument("--n", required=True, type=int, help="Samples per polygon")
    prompts.add_argument("--seed", type=int, default=0, help="Root seed")
    prompts.add_argument("--out", required=True, help="Output directory")

    evaluation = commands.add_parser("eval", help="Evaluate solved frames against ground truth")
    evaluation.add_argument("--results", required=True, help="Results file path")
    evaluation.add_argument("--truth", required=True, help="Detection file or directory carrying ground truth")
    evaluation.add_argument("--out", required=True, help="Summary CSV path")
    evaluation.add_argument("--reports", default=None, help="Reports file path for the certified keypoint CDF")

    analysis = commands.add_parser("cert-analysis", help="Bin certificate scores against ground-truth errors")
    analysis.add_argument("--reports", required=True, help="Reports file path")
    analysis.add_argument("--truth", required=True, help="Detection file or directory carrying ground truth")
    analysis.add_argument("--out", required=True, help="Output directory of the three CSV tables")
    analysis.add_argument("--bins", type=int, default=pipeline.Binning.count, help="Number of bins")
    analysis.add_argument(
        "--binning",
        default=pipeline.Binning.kind,
        choices=pipeline.Binning.SUPPORTED_KINDS,
        help="Bin layout"
    )

    init = commands.add_parser("init", help="Write a default configuration file")
    init.add_argument("--kind", default="run", choices=ConfigParser.SUPPORTED_KINDS, help="Configuration kind")
    init.add_argument("--out", required=True, help="Configuration file path")
    init.add_argument("--eps-conf", type=float, default=None, help="Keypoint confidence threshold of a run config")
    return parser


def run_synth(args) -> None:
    config = ConfigParser(config_path=args.config, kind="scene")
    config.read_config()
    scene_config = config.get_scene_config()
    formats.write_calibration(os.path.join(args.out, CALIBRATION_FILE), build_rig(scene_config))
    for index in range(args.count):
        scene = generate_scene(scene_config, index)
        write_scene(scene, corrupt_observations(scene, scene_config), args.out)
    logging.info(f"Generated {args.count} scenes in [{args.out}]")


def run_estimate(args) -> None:
    config = ConfigParser(config_path=args.config, kind="run")
    config.read_config()
    run_config = config.get_run_config()
    if args.workers is not None:
        run_config = replace(run_config, parallelism=args.workers)
    rig = formats.read_calibration(args.calib)
    frames = pipeline.ingest_detections(args.detections, run_config.eps_conf, isolate=True)
    records = pipeline.estimate_frames(frames, rig, run_config)
    pipeline.write_results(args.out, rig, records, run_config.eps_conf)
    logging.info(f"Results written to [{args.out}]")


def run_certify(args) -> None:
    config = ConfigParser(config_path=args.thresholds, kind="thresholds")
    config.read_config()
    thresholds = config.get_thresholds()
    rig, records = pipeline.read_results(args.results)
    mask_source = pipeline.DirectoryMaskSource(args.masks, rig, name=args.mask_source)
    records = pipeline.certify_frames(records, rig, mask_source, thresholds, args.workers)
    pipeline.write_reports(args.out, rig, thresholds, mask_source.name, records)
    logging.info(f"Reports written to [{args.out}]")


def run_pseudo_label(args) -> None:
    _, thresholds, _, reports = pipeline.read_reports(args.reports)
    pipeline.emit_pseudo_label_dataset(reports, args.out, thresholds)


def run_sample_prompts(args) -> None:
    rig, records = pipeline.read_results(args.results)
    pipeline.emit_prompts(records, rig, args.strategy, args.n, args.seed, args.out)


def run_eval(args) -> None:
    rig, records = pipeline.read_results(args.results)
    truths = pipeline.load_truths(args.truth, rig)
    reports = pipeline.read_reports(args.reports)[3] if args.reports else ()
    summary = pipeline.evaluate(
        estimates={record.frame_id: record.result.state for record in records if record.result is not None},
        truths=truths,
        reports=reports,
        observations=[record.observation for record in records if record.observation is not None]
    )
    for path in pipeline.write_evaluation(summary, args.out):
        logging.info(f"Evaluation written to [{path}]")


def run_cert_analysis(args) -> None:
    rig, _, _, reports = pipeline.read_reports(args.reports)
    truths = pipeline.load_truths(args.truth, rig)
    report = pipeline.certificate_correlation_report(
        reports, truths, pipeline.Binning(count=args.bins, kind=args.binning)
    )
    for path in pipeline.write_correlation_tables(report, args.out):
        logging.info(f"Certificate table written to [{path}]")


def run_init(args) -> None:
    config = ConfigParser(config_path=args.out, kind=args.kind)
    if os.path.exists(args.out):
        logging.warning(f"Boxcert configuration is already initialized at [{args.out}]")
        logging.warning(f"Skipping initialization...")
        return
    overrides = {"eps_conf": args.eps_conf} if args.kind == "run" and args.eps_conf is not None else {}
    logging.info(f"Initializing Boxcert [{args.kind}] configuration [{args.out}]")
    config.initialize_config(**overrides)
    config.write_config()


COMMANDS = {
    "synth": run_synth,
    "estimate": run_estimate,
    "certify": run_certify,
    "pseudo-label": run_pseudo_label,
    "sample-prompts": run_sample_prompts,
    "eval": run_eval,
    "cert-analysis": run_cert_analysis,
    "init": run_init
}

INPUT_FLAGS = {
    "synth": ("config",),
    "estimate": ("detections", "calib", "config"),
    "certify": ("results", "masks", "thresholds"),
    "pseudo-label": ("reports",),
    "sample-prompts": ("results",),
    "eval": ("results", "truth", "reports"),
    "cert-analysis": ("reports", "truth"),
    "init": ()
}


def main(argv=None) -> None:
    """
    Main Boxcert function that is executed to run the batch correct-and-certify operations.

    Supported commands are:

      1. Synthetic scene, detection and mask generation (synth)
      2. Pose and shape estimation over detection files (estimate)
      3. Certification and pseudo-label selection (certify)
      4. Pseudo-label dataset emission (pseudo-label)
      5. Segmentation prompt sampling (sample-prompts)
      6. Evaluation against ground truth (eval)
      7. Certificate score analysis against ground truth (cert-analysis)
      8. Default configuration initialization (init)

    Example:

    .. code-block:: bash

        $ boxcert synth --config scene.json --count 200 --out data

        $ boxcert estimate --detections data/detections --calib data/calibration.json --config run.json --out results.json

    Exit codes are 0 on success, 1 on usage errors and 2 on data errors.

    :param argv: Command line arguments, defaults to :data:`sys.argv`
    :return: None
    """
    debug_mode = None
    boxcert_logger = logging.getLogger()
    coloredlogs.DEFAULT_FIELD_STYLES = {
        "asctime": {
            "color": "green"
        },
        "levelname": {
            "faint": True,
            "color": "cyan"
        },
        "name": {
            "color": "blue"
        },
        "programname": {
            "color": "cyan"
        }
    }
    coloredlogs.DEFAULT_LEVEL_STYLES = {
        "critical": {
            "bold": True,
            "color": "red"
        },
        "debug": {
            "color": "green",
            "faint": True
        },
        "error": {
            "color": "red"
        },
        "info": {
            "color": "green"
        },
        "verbose": {
            "color": "blue"
        },
        "warning": {
            "color": "yellow"
        }
    }
    coloredlogs.install(fmt="%(levelname)s: %(message)s", level='DEBUG')
    parser = build_parser()
    args = parser.parse_args(argv)
    require_paths(parser, **{flag: getattr(args, flag) for flag in INPUT_FLAGS[args.command]})
    try:
        if args.suppress:
            logging.disable(level=logging.CRITICAL)
        elif args.debug:
            banner()
            boxcert_logger.setLevel(logging.DEBUG)
            boxcert_logger.info("Boxcert log level set to debug")
            debug_mode = True
        else:
            banner()
            boxcert_logger.setLevel(logging.INFO)
        COMMANDS[args.command](args)
    except Exception as err:
        if not debug_mode:
            boxcert_logger.error("Something went wrong! Set --debug flag during execution to view more details")
        boxcert_logger.error(err)
        sys.exit(EXIT_DATA)
    except KeyboardInterrupt:
        boxcert_logger.error("Interrupted. Exiting...")
        sys.exit(EXIT_USAGE)


if __name__ == '__main__':
    main()
