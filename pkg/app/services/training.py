"""
Training Service Module

Implements the fold-split training procedure of the surrogate:

1. collect scoop records on the training terrains;
2. split the terrains into folds grouped by material family;
3. per fold, train encoder + deep mean on the other folds (mean set) and
   compute its residuals on the fold itself (kernel set);
4. retrain encoder + deep mean on every terrain;
5. train one common residual kernel on the losses of all folds jointly, with
   every fold's residuals placed at the final encoder's features, and attach it.

The joint variant skips the split: the kernel is fit to in-sample residuals of
the final deep mean. It exists as an ablation.

Every stage is deterministic for a given seed.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from app.config import Settings
from app.core.random import derive_seed, rng_for
from app.exceptions import (DatasetError, EmptyCandidateSetError, InvalidFoldPlanError, NoFeasibleActionsError,
                            TrainingDivergenceError)
from app.models.dataset import EpisodicBatch, ResidualSet, TerrainRecords, TrainingDataset, TrainingRecord
from app.models.surrogate import Architecture, ResidualKernel, SurrogateModel
from app.schemas.terrain import TerrainSpec
from app.schemas.training import FoldPlan, TrainingLogEntry, TrainingReport
from app.services.perception import PerceptionService
from app.services.policy import PolicyService
from app.services.terrain import TerrainService

logger = logging.getLogger(__name__)

GRADIENT_CLIP = 10.0
EVAL_BATCH = 256


@dataclass
class TrainingResult:
    model: SurrogateModel
    report: TrainingReport
    fold_residuals: List[Dict[str, ResidualSet]] = field(default_factory=list)


class TrainingService:
    """
    Service class for dataset collection and surrogate training.

    Attributes:
        settings (Settings): Full settings; training, scoop and perception sections are used
        terrain (TerrainService): Terrain synthesis and scoop execution
        perception (PerceptionService): Observations and patches
        policy (PolicyService): Candidate generation

    Methods:
        collect_training_data: Record N scoops per training terrain
        split_folds: Family-grouped fold plan
        train_mean: Fit encoder + deep mean by mini-batch SGD
        compute_residuals: Deep-mean residuals per terrain
        train_kernel_codega: Common kernel over episodic losses of every fold
        finalize_model: Deep mean retrained on all data plus the common kernel fit to its features
        train: Full pipeline in codega or joint mode
        evaluate_episodic_nll: Held-out episodic predictive NLL of a model
    """

    def __init__(self, settings: Settings, terrain: TerrainService, perception: PerceptionService,
                 policy: PolicyService):
        self.settings = settings
        self.config = settings.training
        self.terrain = terrain
        self.perception = perception
        self.policy = policy
        self.architecture = Architecture.from_settings(settings.training, settings.perception)

    # ------------------------------------------------------------------ data

    def collect_training_data(self, specs: Sequence[TerrainSpec], actions_per_terrain: Optional[int] = None,
                              seed: int = 0) -> TrainingDataset:
        """
        Execute N uniformly sampled feasible actions per terrain and record the outcomes.

        Every action runs on an unmodified copy of the terrain; the terrain is
        re-synthesized with fresh roughness every RESET_EVERY actions.

        Args:
            specs (Sequence[TerrainSpec]): Training terrains
            actions_per_terrain (int, optional): N; defaults to ACTIONS_PER_TERRAIN
            seed (int): Master seed

        Returns:
            TrainingDataset: N records per terrain

        Raises:
            NoFeasibleActionsError: If a terrain offers no feasible candidate
        """
        n = self.config.ACTIONS_PER_TERRAIN if actions_per_terrain is None else actions_per_terrain
        if n < 0:
            raise ValueError(f"actions per terrain must be >= 0, got {n}")
        dataset = TrainingDataset()
        for spec in specs:
            self.terrain.validate_spec(spec)
            materials = tuple(m.name for m in spec.materials)
            families = sorted({m.family for m in spec.materials})
            terrain_records = TerrainRecords(spec.spec_id, materials, "+".join(families))
            rng = rng_for(seed, "collect", spec.spec_id)
            for start in range(0, n, self.config.RESET_EVERY):
                reset_seed = derive_seed(seed, "reset", spec.spec_id, start)
                state = self.terrain.synthesize_terrain(spec.with_seed(reset_seed))
                raster = self.perception.observe(state, rng=rng_for(reset_seed, "noise"))
                try:
                    candidates = self.policy.generate_candidates(raster, state)
                except EmptyCandidateSetError:
                    raise NoFeasibleActionsError(f"Training terrain {spec.spec_id} has no feasible action")
                count = min(self.config.RESET_EVERY, n - start)
                picks = rng.choice(len(candidates), size=count, replace=count > len(candidates))
                for index in picks:
                    candidate = candidates[int(index)]
                    outcome, _ = self.terrain.execute_scoop(state, candidate.action)
                    terrain_records.records.append(
                        TrainingRecord(spec.spec_id, candidate.patch, candidate.action, outcome.volume))
            dataset.add(terrain_records)
            rewards = [r.reward for r in terrain_records.records]
            logger.info(f"Collected {len(rewards)} scoops on {spec.spec_id} "
                        f"(mean volume {np.mean(rewards) if rewards else 0.0:.2f} cm3)")
        return dataset

    @staticmethod
    def split_folds(terrain_ids: Sequence[str], families: Dict[str, str], folds: int, seed: int) -> FoldPlan:
        """
        Seeded partition of terrains into folds, keeping material families together.

        Families are shuffled, concatenated and cut into `folds` contiguous
        chunks, so similar materials land in the same kernel set and are absent
        from its mean set.

        Raises:
            InvalidFoldPlanError: If folds < 2 or folds exceeds the number of terrains
        """
        ids = list(terrain_ids)
        if folds > len(ids):
            raise InvalidFoldPlanError(f"{folds} folds requested for {len(ids)} terrains")
        if folds < 2:
            raise InvalidFoldPlanError("At least two folds are needed so every mean set is non-empty")
        by_family: Dict[str, List[str]] = {}
        for tid in ids:
            by_family.setdefault(families.get(tid, tid), []).append(tid)
        rng = rng_for(seed, "folds")
        names = sorted(by_family)
        ordered = [tid for f in rng.permutation(len(names)) for tid in sorted(by_family[names[f]])]
        chunks = np.array_split(np.arange(len(ordered)), folds)
        return FoldPlan(folds=[[ordered[i] for i in chunk] for chunk in chunks], seed=seed)

    @staticmethod
    def fit_reward_affine(dataset: TrainingDataset) -> Tuple[float, float]:
        """Offset and scale standardizing the corpus rewards; scale falls back to 1 for constant rewards."""
        rewards = dataset.rewards()
        if rewards.size == 0:
            return 0.0, 1.0
        offset = math.fsum(rewards) / rewards.size
        scale = float(np.std(rewards))
        return offset, scale if scale > 1e-9 else 1.0

    # ------------------------------------------------------------------ mean

    def train_mean(self, dataset: TrainingDataset, affine: Tuple[float, float], seed: int,
                   label: str = "final") -> Tuple[SurrogateModel, List[TrainingLogEntry]]:
        """
        Fit encoder and deep mean to the dataset by mini-batch SGD with momentum.

        The full-batch MSE is monitored after every epoch and the best
        parameters are kept, so the returned loss never exceeds the initial one.

        Args:
            dataset (TrainingDataset): Mean-set records
            affine (Tuple[float, float]): Reward standardization (offset, scale)
            seed (int): Initialization and shuffling seed
            label (str): Name used in the loss log

        Returns:
            Tuple[SurrogateModel, List[TrainingLogEntry]]: Model with an untrained kernel, loss curve

        Raises:
            DatasetError: If the dataset is empty
            TrainingDivergenceError: If the loss becomes non-finite
        """
        records = dataset.records()
        if not records:
            raise DatasetError(f"Cannot train the deep mean of '{label}' on an empty dataset")

        torch.manual_seed(derive_seed(seed, "init", label))
        model = SurrogateModel(self.architecture, *affine)
        depth, color, action = model.tensors([r.patch for r in records])
        targets = model.standardize(torch.tensor([r.reward for r in records], dtype=torch.float64))
        parameters = list(model.encoder.parameters()) + list(model.mean.parameters())
        optimizer = torch.optim.SGD(parameters, lr=self.config.MEAN_LR, momentum=self.config.MEAN_MOMENTUM)
        generator = torch.Generator().manual_seed(derive_seed(seed, "shuffle", label))

        def full_loss() -> float:
            with torch.no_grad():
                total = 0.0
                for start in range(0, len(records), EVAL_BATCH):
                    sl = slice(start, start + EVAL_BATCH)
                    pred = model.mean(model.encoder(depth[sl], color[sl], action[sl]))
                    total += float(((pred - targets[sl]) ** 2).sum())
                return total / len(records)

        best_loss = full_loss()
        best_state = copy.deepcopy(model.state_dict())
        log = [TrainingLogEntry(phase="mean", label=label, step=0, loss=best_loss)]
        initial = best_loss
        for epoch in range(1, self.config.MEAN_EPOCHS + 1):
            permutation = torch.randperm(len(records), generator=generator)
            for start in range(0, len(records), self.config.BATCH_SIZE):
                batch = permutation[start:start + self.config.BATCH_SIZE]
                optimizer.zero_grad()
                pred = model.mean(model.encoder(depth[batch], color[batch], action[batch]))
                loss = ((pred - targets[batch]) ** 2).mean()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(parameters, GRADIENT_CLIP)
                optimizer.step()
            epoch_loss = full_loss()
            if not math.isfinite(epoch_loss):
                raise TrainingDivergenceError(f"Deep mean '{label}' diverged at epoch {epoch}")
            log.append(TrainingLogEntry(phase="mean", label=label, step=epoch, loss=epoch_loss))
            if epoch_loss < best_loss:
                best_loss = epoch_loss
                best_state = copy.deepcopy(model.state_dict())
            if epoch % 50 == 0:
                logger.info(f"Deep mean '{label}' epoch {epoch}: mse {epoch_loss:.4f} (best {best_loss:.4f})")

        model.load_state_dict(best_state)
        model.eval()
        logger.info(f"Deep mean '{label}' trained on {len(records)} records: mse {initial:.4f} -> {best_loss:.4f}")
        return model, log

    @staticmethod
    def compute_residuals(model: SurrogateModel, dataset: TrainingDataset,
                          features_from: Optional[SurrogateModel] = None) -> Dict[str, ResidualSet]:
        """
        Deep-mean residuals rho = r - m_hat for every record, grouped by terrain.

        Args:
            model (SurrogateModel): Model whose deep mean gives m_hat
            dataset (TrainingDataset): Records to score
            features_from (SurrogateModel, optional): Encoder that places the residuals
                in feature space; defaults to the model's own encoder
        """
        residuals = {}
        for terrain in dataset:
            patches = [r.patch for r in terrain.records]
            own = model.encode(patches)
            with torch.no_grad():
                predictions = model.to_reward(model.mean(own)).numpy()
            residuals[terrain.terrain_id] = ResidualSet(
                terrain_id=terrain.terrain_id,
                features=own if features_from is None else features_from.encode(patches),
                rewards=np.array([r.reward for r in terrain.records], dtype=np.float64),
                predictions=predictions,
                reward_scale=model.reward_scale,
            )
        return residuals

    # ---------------------------------------------------------------- kernel

    def _episode_loss(self, kernel: ResidualKernel, residuals: ResidualSet, batch: EpisodicBatch) -> torch.Tensor:
        rho = residuals.standardized()
        support = torch.tensor(batch.support, dtype=torch.long)
        query = torch.tensor(batch.query, dtype=torch.long)
        if self.config.KERNEL_OBJECTIVE == "marginal":
            indices = torch.cat([support, query])
            return kernel.nlml(residuals.features[indices], rho[indices]) / len(indices)
        return kernel.predictive_nll(residuals.features[support], rho[support],
                                     residuals.features[query], rho[query])

    def _sample(self, group: Dict[str, ResidualSet], rng: np.random.Generator) -> Optional[Tuple[str, EpisodicBatch]]:
        eligible = [tid for tid, rs in group.items() if len(rs) >= 2]
        if not eligible:
            return None
        tid = eligible[int(rng.integers(len(eligible)))]
        query_size = self.config.QUERY_SIZE
        if self.config.KERNEL_OBJECTIVE == "marginal":
            query_size = max(self.config.MARGINAL_BATCH - self.config.SUPPORT_MAX, 1)
        batch = EpisodicBatch.sample(tid, len(group[tid]), self.config.SUPPORT_MAX, query_size, rng)
        return tid, batch

    def _aggregate_loss(self, kernel: ResidualKernel, groups: List[Dict[str, ResidualSet]],
                        episodes: List[List[Tuple[str, EpisodicBatch]]]) -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for group, fold_episodes in zip(groups, episodes):
            if fold_episodes:
                losses = [self._episode_loss(kernel, group[tid], batch) for tid, batch in fold_episodes]
                total = total + torch.stack(losses).mean()
        return total

    def train_kernel_codega(self, groups: List[Dict[str, ResidualSet]], seed: int,
                            label: str = "codega") -> Tuple[ResidualKernel, List[TrainingLogEntry]]:
        """
        Train one kernel on the summed episodic losses of every residual group.

        Each step draws one episode per group; a fixed set of evaluation
        episodes is scored every EVAL_INTERVAL steps and the best kernel is kept.

        Args:
            groups (List[Dict[str, ResidualSet]]): Residuals per fold, keyed by terrain
            seed (int): Episode sampling seed
            label (str): Name used in the loss log

        Returns:
            Tuple[ResidualKernel, List[TrainingLogEntry]]: Trained kernel and loss curve

        Raises:
            DatasetError: If no group holds a terrain with two or more records
            TrainingDivergenceError: If the loss becomes non-finite
        """
        kernel = ResidualKernel(self.architecture.feature_dim, self.architecture.lengthscale_mode)
        optimizer = torch.optim.SGD(kernel.parameters(), lr=self.config.KERNEL_LR,
                                    momentum=self.config.KERNEL_MOMENTUM)
        eval_rng = rng_for(seed, "kernel-eval", label)
        evaluation = []
        for group in groups:
            drawn = [self._sample(group, eval_rng) for _ in range(self.config.EVAL_EPISODES)]
            evaluation.append([d for d in drawn if d is not None])
        if not any(evaluation):
            raise DatasetError("No residual group holds a terrain with two or more records")

        def monitored() -> float:
            with torch.no_grad():
                return float(self._aggregate_loss(kernel, groups, evaluation))

        best_loss = monitored()
        best_state = copy.deepcopy(kernel.state_dict())
        log = [TrainingLogEntry(phase="kernel", label=label, step=0, loss=best_loss)]
        initial = best_loss
        rng = rng_for(seed, "kernel-train", label)
        floors = (self.config.SIGNAL_VARIANCE_FLOOR, self.config.NOISE_VARIANCE_FLOOR)

        for step in range(1, self.config.KERNEL_STEPS + 1):
            episodes = []
            for group in groups:
                drawn = self._sample(group, rng)
                episodes.append([drawn] if drawn is not None else [])
            optimizer.zero_grad()
            loss = self._aggregate_loss(kernel, groups, episodes)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(f"Kernel '{label}' diverged at step {step}")
            loss.backward()
            optimizer.step()
            kernel.clamp_(*floors)
            if step % self.config.EVAL_INTERVAL == 0 or step == self.config.KERNEL_STEPS:
                current = monitored()
                if not math.isfinite(current):
                    raise TrainingDivergenceError(f"Kernel '{label}' diverged at step {step}")
                log.append(TrainingLogEntry(phase="kernel", label=label, step=step, loss=current))
                if current < best_loss:
                    best_loss = current
                    best_state = copy.deepcopy(kernel.state_dict())

        kernel.load_state_dict(best_state)
        logger.info(f"Kernel '{label}': loss {initial:.4f} -> {best_loss:.4f}, "
                    f"signal {kernel.signal_variance:.4g}, noise {kernel.noise_variance:.4g}")
        return kernel, log

    # --------------------------------------------------------------- pipeline

    def finalize_model(self, dataset: TrainingDataset, fold_models: Sequence[SurrogateModel], plan: FoldPlan,
                       affine: Tuple[float, float], seed: int
                       ) -> Tuple[SurrogateModel, List[Dict[str, ResidualSet]], List[TrainingLogEntry]]:
        """
        Retrain encoder + deep mean on every terrain and fit the common kernel for it.

        Residual values still come from the fold means (fold f's mean scored on
        fold f's kernel set), but they are placed at the final encoder's
        features, the space the kernel is deployed in.

        Args:
            dataset (TrainingDataset): Records of every training terrain
            fold_models (Sequence[SurrogateModel]): Mean model of each fold, in plan order
            plan (FoldPlan): Fold plan the mean models were trained on
            affine (Tuple[float, float]): Reward standardization (offset, scale)
            seed (int): Master seed

        Returns:
            tuple: (deployable model, residual groups the kernel was fit to, loss log)
        """
        if len(fold_models) != len(plan.folds):
            raise InvalidFoldPlanError(f"{len(fold_models)} fold models for {len(plan.folds)} folds")
        model, log = self.train_mean(dataset, affine, seed, label="final")
        groups = [self.compute_residuals(fold_model, dataset.restrict(plan.kernel_set(f)), features_from=model)
                  for f, fold_model in enumerate(fold_models)]
        kernel, kernel_log = self.train_kernel_codega(groups, seed, label="codega")
        model.kernel.load_state_dict(kernel.state_dict())
        return model, groups, log + kernel_log

    def train(self, dataset: TrainingDataset, mode: str = "codega", seed: int = 0,
              folds: Optional[int] = None) -> TrainingResult:
        """
        Full training pipeline.

        Args:
            dataset (TrainingDataset): Records of every training terrain
            mode (str): "codega" for fold-split kernel training, "joint" for the no-split ablation
            seed (int): Master seed
            folds (int, optional): Fold count; defaults to FOLDS

        Returns:
            TrainingResult: Deployable model, report and the residuals the kernel was fit to
        """
        if mode not in ("codega", "joint"):
            raise ValueError(f"Unknown training mode '{mode}'")
        affine = self.fit_reward_affine(dataset)
        log: List[TrainingLogEntry] = []
        plan = None

        if mode == "codega":
            plan = self.split_folds(dataset.terrain_ids(), dataset.families(), folds or self.config.FOLDS, seed)
            fold_models = []
            for f in range(len(plan.folds)):
                mean_model, mean_log = self.train_mean(dataset.restrict(plan.mean_set(f)), affine, seed,
                                                       label=f"fold_{f}")
                log.extend(mean_log)
                fold_models.append(mean_model)
            model, groups, final_log = self.finalize_model(dataset, fold_models, plan, affine, seed)
            log.extend(final_log)
        else:
            model, final_log = self.train_mean(dataset, affine, seed, label="final")
            groups = [self.compute_residuals(model, dataset)]
            kernel, kernel_log = self.train_kernel_codega(groups, seed, label="joint")
            model.kernel.load_state_dict(kernel.state_dict())
            log.extend(final_log)
            log.extend(kernel_log)

        report = TrainingReport(
            mode=mode,
            plan=plan,
            reward_offset=affine[0],
            reward_scale=affine[1],
            signal_variance=model.kernel.signal_variance,
            noise_variance=model.kernel.noise_variance,
            lengthscales=torch.exp(model.kernel.log_lengthscales).detach().tolist(),
            log=log,
        )
        return TrainingResult(model=model, report=report, fold_residuals=groups)

    def evaluate_episodic_nll(self, model: SurrogateModel, dataset: TrainingDataset, episodes: int = 100,
                              seed: int = 0) -> float:
        """
        Mean episodic predictive NLL of a model's kernel on (held-out) terrains.

        Residuals come from the model's own deep mean; episodes are drawn with
        the configured support and query sizes from a fixed seed, so two models
        evaluated with the same seed see the same episodes.
        """
        residuals = self.compute_residuals(model, dataset)
        rng = rng_for(seed, "heldout-episodes")
        losses = []
        with torch.no_grad():
            for _ in range(episodes):
                drawn = self._sample(residuals, rng)
                if drawn is None:
                    raise DatasetError("Held-out dataset has no terrain with two or more records")
                tid, batch = drawn
                rho = residuals[tid].standardized()
                rs = residuals[tid]
                support = torch.tensor(batch.support, dtype=torch.long)
                query = torch.tensor(batch.query, dtype=torch.long)
                losses.append(float(model.kernel.predictive_nll(rs.features[support], rho[support],
                                                                rs.features[query], rho[query])))
        return math.fsum(losses) / len(losses)

