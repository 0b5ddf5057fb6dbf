"""
Command line interface of the toolkit (console script "pse").

Sub commands:
    simulate    simulate a dataset (noise / mix / nmix) from speech, noise and impulse response pools
    train       two stage training (TF-loss, then adaptive focal loss) with optional DAC
    enhance     pre-process and enhance all records of a manifest
    eval        score enhanced files (SISNR, hard sample rates, SNR histogram)
    prep        apply DAC, spectral subtraction or MMSE-LSA to single files

Exit codes: 0 success, 1 partial result (i.e. missing files were excluded), 2 invalid invocation.
Every run writes resolved_config.json into its output directory.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from pse import PseException, TrainingDiverged, AudioFormatException, PrepException, NothingScored, __version__
from pse.audio import read_wav, write_wav
from pse.dsp import StftConfig
from pse.evaluator import condition_report, write_report, write_missing_summary, load_scores_csv, hard_subset, \
    build_report, HARD_THRESHOLD
from pse.helper.config import load_config, merge_section, RunConfig
from pse.manifest import load_manifest, save_manifest
from pse.model import load_checkpoint, enhance, ModelDims
from pse.prep import PrepConfig, PrepMethod, dac, spectral_subtract, mmse_lsa
from pse.simulator import SimSpec, simulate
from pse.trainer import TrainConfig, init_params, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2


class UsageError(Exception):
    """ invalid combination of arguments that argparse can not detect """
    pass


def _parse_counts(text: str) -> tuple:
    try:
        counts = tuple(int(x) for x in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError("counts must look like N,M,K, got '{}'".format(text))
    if len(counts) != 3:
        raise argparse.ArgumentTypeError("counts must have three entries (noise, mix, nmix), got '{}'".format(text))
    return counts


def _parse_snr(text: str) -> tuple:
    try:
        lo, hi = (float(x) for x in text.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError("snr range must look like LO:HI (i.e. -5:20), got '{}'".format(text))
    return lo, hi


def _on_off(text: str) -> bool:
    if text not in ('on', 'off'):
        raise argparse.ArgumentTypeError("expected on or off, got '{}'".format(text))
    return text == 'on'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pse', description='Personalized speech enhancement toolkit')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='master seed')
    common.add_argument('--config', default=None, help='json config file (sections stft, train, simulate, prep)')

    p = sub.add_parser('simulate', parents=[common], help='simulate a dataset')
    p.add_argument('--clean-dir', default=None, help='clean speech pool, one sub directory per speaker')
    p.add_argument('--noise-dir', default=None)
    p.add_argument('--rir-dir', default=None)
    p.add_argument('--counts', type=_parse_counts, default=None, help='records per condition N,M,K (noise,mix,nmix)')
    p.add_argument('--snr', type=_parse_snr, default=None, help='SNR range LO:HI in dB, i.e. --snr=-5:20')
    p.add_argument('--seconds', type=float, default=None)
    p.add_argument('--sample-rate', type=int, default=None)
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--out', required=True)

    p = sub.add_parser('train', parents=[common], help='train a model')
    p.add_argument('--manifest', required=True)
    p.add_argument('--val-manifest', required=True)
    p.add_argument('--dac', type=_on_off, default=None, help='on or off')
    p.add_argument('--j', type=int, default=None, help='DAC leading frames')
    p.add_argument('--k', type=int, default=None, help='DAC trailing frames')
    p.add_argument('--stage', choices=('tf', 'aft', 'both'), default='both')
    p.add_argument('--init-checkpoint', default=None, help='start from a checkpoint (i.e. stage 2 only)')
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--stage2-epochs', type=int, default=None)
    p.add_argument('--stage2-lr', type=float, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--lr', type=float, default=None)
    p.add_argument('--max-seconds', type=float, default=None)
    p.add_argument('--emb-dim', type=int, default=None)
    p.add_argument('--hidden', type=int, default=None)
    p.add_argument('--unclamped', action='store_true', default=None)
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--out', required=True)

    prep_flags = argparse.ArgumentParser(add_help=False)
    prep_flags.add_argument('--j', type=int, default=None)
    prep_flags.add_argument('--k', type=int, default=None)
    prep_flags.add_argument('--alpha', type=float, default=None)
    prep_flags.add_argument('--beta', type=float, default=None)
    prep_flags.add_argument('--dd-alpha', type=float, default=None)
    prep_flags.add_argument('--xi-min', type=float, default=None)

    p = sub.add_parser('enhance', parents=[common, prep_flags], help='enhance a manifest')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--manifest', required=True)
    p.add_argument('--prep', choices=PrepMethod.ENHANCE, default=None)
    p.add_argument('--out', required=True)

    p = sub.add_parser('eval', parents=[common], help='evaluate enhanced files')
    p.add_argument('--manifest', required=True)
    p.add_argument('--enhanced-dir', required=True)
    p.add_argument('--baseline-scores', default=None, help='per_sample.csv of a baseline, enables the hard subset')
    p.add_argument('--threshold', type=float, default=HARD_THRESHOLD)
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--out', required=True)

    p = sub.add_parser('prep', parents=[common, prep_flags], help='pre-process single files')
    p.add_argument('--method', choices=PrepMethod.STANDALONE, required=True)
    p.add_argument('--noisy', required=True)
    p.add_argument('--enroll', default=None, help='enrollment (DAC only)')
    p.add_argument('--out', required=True, help='output wav file')
    return parser


def _stft_config(config: dict) -> StftConfig:
    return merge_section(StftConfig, config.get('stft'))


def _prep_config(args, config: dict, method: Optional[str]) -> PrepConfig:
    return merge_section(PrepConfig, config.get('prep'), {
        'method': method, 'j_frames': args.j, 'k_frames': args.k, 'alpha': args.alpha, 'beta': args.beta,
        'dd_alpha': args.dd_alpha, 'xi_min': args.xi_min})


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    spec = merge_section(SimSpec, config.get('simulate'), {
        'clean_dir': args.clean_dir, 'noise_dir': args.noise_dir, 'rir_dir': args.rir_dir, 'counts': args.counts,
        'snr_range': args.snr, 'seconds': args.seconds, 'sample_rate': args.sample_rate, 'seed': args.seed,
        'workers': args.workers, 'out_dir': args.out})
    if spec.clean_dir is None:
        raise UsageError('the following arguments are required: --clean-dir')
    RunConfig('simulate', spec.seed, args.out, {'simulate': spec}).write_snapshot()
    manifest = simulate(spec)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    stft_config = _stft_config(config)
    train_config = merge_section(TrainConfig, config.get('train'), {
        'dac_enabled': args.dac, 'dac_j': args.j, 'dac_k': args.k, 'max_epochs': args.epochs,
        'stage2_max_epochs': args.stage2_epochs, 'stage2_lr': args.stage2_lr, 'batch_size': args.batch_size,
        'lr0': args.lr, 'max_seconds': args.max_seconds, 'emb_dim': args.emb_dim, 'hidden': args.hidden,
        'unclamped': args.unclamped, 'workers': args.workers, 'seed': args.seed})
    run = RunConfig('train', train_config.seed, args.out, {'stft': stft_config, 'train': train_config}, {
        'manifest': args.manifest, 'val_manifest': args.val_manifest, 'stage': args.stage,
        'init_checkpoint': args.init_checkpoint})
    run.write_snapshot()

    train_set = load_manifest(args.manifest)
    val_set = load_manifest(args.val_manifest)
    if args.init_checkpoint is not None:
        params = load_checkpoint(args.init_checkpoint, ModelDims.from_stft(
            stft_config, train_config.emb_dim, train_config.hidden))
    else:
        params = init_params(train_set, train_config, stft_config)
    try:
        _, history = train(params, train_set, val_set, train_config, stft_config, args.stage, args.out)
    except TrainingDiverged as e:
        logger.error("{} (best checkpoint written to {})".format(e, args.out))
        return EXIT_PARTIAL
    best = history.best()
    if best is not None:
        print("best validation TF-loss {:.4f} ({} epoch {})".format(best.val_loss, best.stage, best.epoch))
    return EXIT_OK


def cmd_enhance(args) -> int:
    config = load_config(args.config)
    stft_config = _stft_config(config)
    prep_config = _prep_config(args, config, args.prep)
    RunConfig('enhance', args.seed or 0, args.out, {'stft': stft_config, 'prep': prep_config}, {
        'checkpoint': args.checkpoint, 'manifest': args.manifest}).write_snapshot()

    params = load_checkpoint(args.checkpoint)
    if params.dims.feat_dim != stft_config.num_bins:
        raise UsageError("checkpoint expects {} bins but the STFT has {}".format(
            params.dims.feat_dim, stft_config.num_bins))
    manifest = load_manifest(args.manifest)
    dac_config = prep_config.dac_config(stft_config)
    failed = []
    for record in manifest:
        try:
            noisy = read_wav(manifest.resolve(record.noisy))
            enroll = read_wav(manifest.resolve(record.enroll))
            if prep_config.method == PrepMethod.DAC:
                enroll = dac(enroll, noisy, dac_config)
            elif prep_config.method == PrepMethod.DAC_UB and record.noise is not None:
                # mix records have no background component, their enrollment stays untouched
                enroll = dac(enroll, noisy, dac_config, true_noise=read_wav(manifest.resolve(record.noise)))
            elif prep_config.method == PrepMethod.SS:
                noisy = spectral_subtract(noisy, prep_config.j_frames, prep_config.resolved_k, prep_config.alpha,
                                          prep_config.beta, stft_config)
            elif prep_config.method == PrepMethod.LSA:
                noisy = mmse_lsa(noisy, prep_config.j_frames, stft_config, prep_config.dd_alpha, prep_config.xi_min)
            write_wav(os.path.join(args.out, record.record_id + '.wav'), enhance(noisy, enroll, params, stft_config))
        except (AudioFormatException, PrepException) as e:
            logger.warning("Could not enhance record {}: {}".format(record.record_id, e))
            failed.append(record.record_id)
    print("enhanced {} of {} records ({})".format(len(manifest) - len(failed), len(manifest), prep_config.method))
    return EXIT_PARTIAL if len(failed) > 0 else EXIT_OK


def cmd_eval(args) -> int:
    RunConfig('eval', args.seed or 0, args.out, {}, {
        'manifest': args.manifest, 'enhanced_dir': args.enhanced_dir, 'baseline_scores': args.baseline_scores,
        'threshold': args.threshold}).write_snapshot()
    manifest = load_manifest(args.manifest)
    try:
        report = condition_report(manifest, args.enhanced_dir, workers=args.workers)
    except NothingScored as e:
        write_missing_summary(e.missing, args.out)
        for record_id in e.missing:
            print("missing enhanced file: {}".format(record_id))
        logger.error(str(e))
        return EXIT_PARTIAL
    write_report(report, args.out)
    print(report.summary_table())

    if args.baseline_scores is not None:
        subset = hard_subset(load_scores_csv(args.baseline_scores), manifest, args.threshold)
        save_manifest(subset, os.path.join(args.out, 'hard_subset.jsonl'))
        hard_ids = {r.record_id for r in subset}
        hard_scores = [s for s in report.per_sample if s.record_id in hard_ids]
        print("hard subset (baseline SISNR < {:g} dB): {} records".format(args.threshold, len(subset)))
        if len(hard_scores) > 0:
            hard_report = build_report(hard_scores)
            write_report(hard_report, args.out, prefix='hard_')
            print(hard_report.summary_table())

    for record_id in report.missing:
        print("missing enhanced file: {}".format(record_id))
    return EXIT_PARTIAL if len(report.missing) > 0 else EXIT_OK


def cmd_prep(args) -> int:
    config = load_config(args.config)
    stft_config = _stft_config(config)
    prep_config = _prep_config(args, config, args.method)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    RunConfig('prep', args.seed or 0, out_dir, {'stft': stft_config, 'prep': prep_config}, {
        'noisy': args.noisy, 'enroll': args.enroll, 'out': args.out}).write_snapshot()

    noisy = read_wav(args.noisy)
    if prep_config.method == PrepMethod.DAC:
        if args.enroll is None:
            raise UsageError('--method dac needs --enroll')
        result = dac(read_wav(args.enroll), noisy, prep_config.dac_config(stft_config))
    elif prep_config.method == PrepMethod.SS:
        result = spectral_subtract(noisy, prep_config.j_frames, prep_config.resolved_k, prep_config.alpha,
                                   prep_config.beta, stft_config)
    else:
        result = mmse_lsa(noisy, prep_config.j_frames, stft_config, prep_config.dd_alpha, prep_config.xi_min)
    write_wav(args.out, result)
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'enhance': cmd_enhance,
    'eval': cmd_eval,
    'prep': cmd_prep,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID

    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print("pse {}: error: {}".format(args.command, e), file=sys.stderr)
        return EXIT_INVALID
    except TrainingDiverged as e:
        logger.error(str(e))
        return EXIT_PARTIAL
    except PseException as e:
        logger.error(str(e))
        return EXIT_INVALID


def run() -> None:
    sys.exit(main())


if __name__ == '__main__':
    run()
