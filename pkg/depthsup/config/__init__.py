#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
@Description  : Configuration management module
"""

import os
import sys
from pathlib import Path

import yaml

DEFAULT_CONFIG_PATH = Path(__file__).with_name("configuration.yaml")

SEED_ENV_VAR = "DEPTHSUP_SEED"
THREADS_ENV_VAR = "DEPTHSUP_NUM_THREADS"


class Config:
    """Configuration singleton, loads every setting from the YAML file once."""

    _instance = None
    _initialized = False

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Config, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        """
        Initialize configuration.
        The _initialized guard makes sure the loading logic runs only once.
        """
        if self._initialized:
            return

        self.config_path = ""
        self.app_version = ""
        self.image_height = 0
        self.image_width = 0
        # keypoints
        self.keypoint_block_size = 0
        self.keypoint_gradient_offset = 0.0
        self.patch_radius = 0
        self.max_keypoints = 0
        # census
        self.census_epsilon = 0.0
        self.census_distance_offset = 0.0
        # losses
        self.flow_smoothness_weight = 0.0
        self.smoothness_weight = 0.0
        self.planar_weight = 0.0
        self.feature_weight = 0.0
        self.rigid_weight = 0.0
        self.photometric_weight = 0.0
        self.occlusion_alpha1 = 0.0
        self.occlusion_alpha2 = 0.0
        self.min_segment_pixels = 0
        # features
        self.feature_levels: list[int] = []
        self.feature_channels: list[int] = []
        self.feature_orientations = 0
        self.feature_sigmas: list[float] = []
        # optimizer
        self.optimizer: dict = {}
        # frames
        self.flow_sources: list[int] = []
        self.photometric_sources: list[int] | None = None
        # evaluation
        self.eval_min_depth: float | None = None
        self.eval_max_depth: float | None = None
        # runtime
        self.seed = 0
        self.num_threads = 1
        # logging
        self.log_dir = ""
        self.log_level = "INFO"
        self.log_format = ""
        self.log_date_format = ""
        self.log_max_bytes = 0
        self.log_backup_count = 0

        self._load_config()
        self._apply_environment()

        self._initialized = True

    def _resolve_config_path(self) -> Path:
        """Prefer a configuration.yaml in the working directory, else the bundled default."""
        local_path = Path(os.getcwd()) / "configuration.yaml"
        if local_path.is_file():
            return local_path
        return DEFAULT_CONFIG_PATH

    def _load_config(self):
        """Load configuration from YAML file."""
        try:
            config_path = self._resolve_config_path()
            with open(config_path, "r", encoding="utf-8") as config_file:
                config_data = yaml.safe_load(config_file)

            self.config_path = str(config_path)
            self.app_version = config_data["app"]["version"]
            self.image_height = int(config_data["app"]["image_height"])
            self.image_width = int(config_data["app"]["image_width"])

            keypoints = config_data["keypoints"]
            self.keypoint_block_size = int(keypoints["block_size"])
            self.keypoint_gradient_offset = float(keypoints["gradient_offset"])
            self.patch_radius = int(keypoints["patch_radius"])
            self.max_keypoints = int(keypoints["max_points"])

            self.census_epsilon = float(config_data["census"]["epsilon"])
            self.census_distance_offset = float(config_data["census"]["distance_offset"])

            losses = config_data["losses"]
            self.flow_smoothness_weight = float(losses["flow_smoothness_weight"])
            self.smoothness_weight = float(losses["smoothness_weight"])
            self.planar_weight = float(losses["planar_weight"])
            self.feature_weight = float(losses["feature_weight"])
            self.rigid_weight = float(losses["rigid_weight"])
            self.photometric_weight = float(losses["photometric_weight"])
            self.occlusion_alpha1 = float(losses["occlusion_alpha1"])
            self.occlusion_alpha2 = float(losses["occlusion_alpha2"])
            self.min_segment_pixels = int(losses["min_segment_pixels"])

            features = config_data["features"]
            self.feature_levels = [int(level) for level in features["levels"]]
            self.feature_channels = [int(count) for count in features["channels"]]
            self.feature_orientations = int(features["orientations"])
            self.feature_sigmas = [float(sigma) for sigma in features["sigmas"]]

            self.optimizer = dict(config_data["optimizer"])

            self.flow_sources = list(config_data["frames"]["flow_sources"])
            self.photometric_sources = config_data["frames"]["photometric_sources"]

            self.eval_min_depth = config_data["evaluation"]["min_depth"]
            self.eval_max_depth = config_data["evaluation"]["max_depth"]

            self.seed = int(config_data["runtime"]["seed"])
            self.num_threads = int(config_data["runtime"]["num_threads"])

            # logging
            self.log_dir = config_data["logging"]["log_dir"]
            self.log_level = config_data["logging"]["log_level"]
            self.log_format = config_data["logging"]["log_format"]
            self.log_date_format = config_data["logging"]["log_date_format"]
            self.log_max_bytes = config_data["logging"]["log_max_bytes"]
            self.log_backup_count = config_data["logging"]["log_backup_count"]

        except Exception as e:
            print(f"Error loading configuration: {e}", file=sys.stderr)
            sys.exit(1)

    def _apply_environment(self):
        """Seed and thread count are the only settings overridable from the environment."""
        seed = os.environ.get(SEED_ENV_VAR)
        if seed:
            self.seed = int(seed)
        threads = os.environ.get(THREADS_ENV_VAR)
        if threads:
            self.num_threads = int(threads)


config = Config()
