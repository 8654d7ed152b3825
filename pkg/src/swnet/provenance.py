"""
Git state of the code that produced a run.

Checkpoints and metric reports embed the commit and dirty files so results
can be traced back. Missing GitPython or a missing repository is not an
error; the description then carries no commit.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

try:
    import git  # type: ignore[import-not-found]

    ANY_GIT_ERROR = (
        git.exc.ODBError,
        git.exc.GitError,
        git.exc.InvalidGitRepositoryError,
        git.exc.GitCommandNotFound,
        OSError,
        ValueError,
        AttributeError,
    )
except ImportError:
    git = None  # type: ignore[assignment]
    ANY_GIT_ERROR = (OSError, ValueError, AttributeError)  # type: ignore[assignment]

logger = logging.getLogger(__name__)


class GitRepo:
    """Read-only view of the git repository enclosing a path."""

    def __init__(self, root_path: Union[str, Path]):
        self.root: Optional[Path] = None
        self.repo = None
        self.git_available = git is not None

        if not self.git_available:
            logger.debug("GitPython not available - run provenance disabled")
            return

        repo_path = Path(root_path).resolve()
        if repo_path.is_file():
            repo_path = repo_path.parent
        try:
            repo = git.Repo(repo_path, search_parent_directories=True)
            working_dir = repo.working_tree_dir
            if working_dir is None:
                raise ValueError("Repository has no working tree directory")
            self.repo = repo
            self.root = Path(working_dir).resolve()
            logger.debug(f"Found git repository at: {self.root}")
        except ANY_GIT_ERROR as e:
            logger.debug(f"No git repository found at {repo_path}: {e}")

    def is_available(self) -> bool:
        return self.git_available and self.repo is not None

    def get_head_commit_sha(self, short: bool = True) -> Optional[str]:
        if not self.is_available():
            return None
        try:
            sha = self.repo.head.commit.hexsha
        except ANY_GIT_ERROR:
            # fresh repository without commits
            return None
        return sha[:7] if short else sha

    def is_dirty(self) -> bool:
        if not self.is_available():
            return False
        try:
            return bool(self.repo.is_dirty())
        except ANY_GIT_ERROR:
            return False

    def get_dirty_files(self) -> List[str]:
        """Staged and unstaged modified files, sorted."""
        if not self.is_available():
            return []
        try:
            dirty = set(self.repo.git.diff("--name-only", "--cached").splitlines())
            dirty.update(self.repo.git.diff("--name-only").splitlines())
        except ANY_GIT_ERROR:
            return []
        return sorted(dirty)

    def describe(self) -> Dict[str, Any]:
        return {
            "commit": self.get_head_commit_sha(short=False),
            "dirty": self.is_dirty(),
            "dirty_files": self.get_dirty_files(),
        }


def describe_code(root_path: Union[str, Path, None] = None) -> Dict[str, Any]:
    """Provenance of the installed swnet sources (or of root_path)."""
    root = root_path if root_path is not None else Path(__file__).parent
    return GitRepo(root).describe()
