//! Download of the benchmark maps and scenarios with pinned SHA-256 sums.

use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::BenchError;

pub const DEFAULT_BASE_URL: &str = "https://movingai.com/benchmarks/mapf";

#[derive(Debug, Clone, Copy)]
pub struct BenchmarkFile {
    pub name: &'static str,
    pub sha256: &'static str,
}

pub const BENCHMARK_FILES: &[BenchmarkFile] = &[
    BenchmarkFile { name: "empty-8-8.map", sha256: "42776e4904ec90689dd034fbd84524d671dc554472cc4221432b0c523d51f152" },
    BenchmarkFile { name: "room-32-32-4.map", sha256: "f107fefbf63c7a1a3753e4a033452301a1cdd7043cab7f45e4ed0e7dec1e90a9" },
    BenchmarkFile { name: "maze-32-32-2.map", sha256: "5c549328775ce530072cb05eda8f9010235a7e29294806d6aebb0ad667479cd3" },
    BenchmarkFile { name: "empty-8-8-even-1.scen", sha256: "46bfd9f62314c390c6381226cce331ecee0567cdf2beb06a459dd620ebd03d6a" },
    BenchmarkFile { name: "empty-8-8-even-2.scen", sha256: "7e749c46b904d00f7d7d926dfe778b893f7a934be340e947071cb0b5ecf9bb5c" },
    BenchmarkFile { name: "empty-8-8-even-3.scen", sha256: "3367b690e0248d0267e0918fb9e5e29bd74ae3db41eb70604eb62a05f2d1af31" },
    BenchmarkFile { name: "empty-8-8-even-4.scen", sha256: "d84e51a3cadca2167273b854bf1f71f84121fadf7d7f621a4f7179bdb51085ce" },
    BenchmarkFile { name: "empty-8-8-even-5.scen", sha256: "5c28a7d434f4e2eae1b46b2a9938dcf20b0da1bbd607e21300f8d6c5366ebba5" },
    BenchmarkFile { name: "room-32-32-4-even-1.scen", sha256: "e45904b73636469251f2de1357a1671cd043c5dbd7e26f3c93e887b7a005e3ac" },
    BenchmarkFile { name: "room-32-32-4-even-2.scen", sha256: "c1d10f4397ba409b667318c41dee5e1b9d06c08fca2ecc1b170fe7f46c6609c9" },
    BenchmarkFile { name: "room-32-32-4-even-3.scen", sha256: "2cbd14a390daad5c04733982c98644a5ee92ce450f2bcb9078b3cd9be48a3a49" },
    BenchmarkFile { name: "room-32-32-4-even-4.scen", sha256: "5080dd5ae9f1d32b49d7d997c44709263d29800e23052912f67766bc9c54485b" },
    BenchmarkFile { name: "room-32-32-4-even-5.scen", sha256: "d5b7bb6b5ff339c7bfd63d2fd85bf2a14215feba26af8798dc83376e807bbdf8" },
    BenchmarkFile { name: "maze-32-32-2-even-1.scen", sha256: "37bec27afb18e8f6e1395d348b5769399dac27c188d6faffffcb6343e326ce3e" },
    BenchmarkFile { name: "maze-32-32-2-even-2.scen", sha256: "2bb83381bea59ccb0cefcac4e9530a45820ca4cb0dfc00872472af40251aa5bb" },
    BenchmarkFile { name: "maze-32-32-2-even-3.scen", sha256: "1ba2a4f2abaa18770cbaca7642f07ef58fcd86f4f32a34eaabb7bcadf033e1d3" },
    BenchmarkFile { name: "maze-32-32-2-even-4.scen", sha256: "75327713bb31be0918c8c0a2bfffccad6d2efb5261c7375b9f2712f7fc783fa4" },
    BenchmarkFile { name: "maze-32-32-2-even-5.scen", sha256: "d418af2f87ad82435d77e762b0ba49516cced4e3a8a13d96ea7c026dc44d38dd" },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchOutcome {
    AlreadyPresent(String),
    Downloaded(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Ensures every file of `files` exists in `data_dir` with the pinned
/// checksum, downloading `<base_url>/<name>` for missing or stale files.
pub fn fetch_benchmarks(
    data_dir: &Path,
    base_url: &str,
    files: &[BenchmarkFile],
) -> Result<Vec<FetchOutcome>, BenchError> {
    std::fs::create_dir_all(data_dir).map_err(|source| BenchError::Io {
        path: data_dir.display().to_string(),
        source,
    })?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| BenchError::Download {
            url: base_url.to_string(),
            msg: e.to_string(),
        })?;
    let mut out = Vec::with_capacity(files.len());
    for file in files {
        let path = data_dir.join(file.name);
        if let Ok(existing) = std::fs::read(&path) {
            if sha256_hex(&existing) == file.sha256 {
                out.push(FetchOutcome::AlreadyPresent(file.name.to_string()));
                continue;
            }
            log::warn!("{} has an unexpected checksum, downloading again", path.display());
        }
        let url = format!("{}/{}", base_url.trim_end_matches('/'), file.name);
        let dl_err = |msg: String| BenchError::Download {
            url: url.clone(),
            msg,
        };
        let resp = client.get(&url).send().map_err(|e| dl_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(dl_err(format!("HTTP {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| dl_err(e.to_string()))?;
        let got = sha256_hex(&bytes);
        if got != file.sha256 {
            return Err(BenchError::Checksum {
                file: file.name.to_string(),
                expected: file.sha256.to_string(),
                got,
            });
        }
        std::fs::write(&path, &bytes).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        out.push(FetchOutcome::Downloaded(file.name.to_string()));
    }
    Ok(out)
}
