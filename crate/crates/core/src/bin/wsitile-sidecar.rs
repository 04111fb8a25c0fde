//! Reference sidecar: serves the segmentation/cleaning wire protocol on
//! stdin/stdout using the built-in heuristic segmenter and fill cleaner.
//!
//! Usage: `wsitile-sidecar [heuristic-params.json]`

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;

use wsitile::penmark::{fill_clean, PenPixelRules};
use wsitile::segment::protocol::{serve, Kind};
use wsitile::segment::{heuristic_segment, HeuristicParams};
use wsitile::RasterRgb;

fn main() -> ExitCode {
    let params = match std::env::args_os().nth(1) {
        None => HeuristicParams::default(),
        Some(path) => match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(p) => p,
            Err(e) => {
                eprintln!("wsitile-sidecar: {}: {e}", path.to_string_lossy());
                return ExitCode::from(2);
            }
        },
    };
    let rules = PenPixelRules::default();
    let handler = move |kind: Kind, w: u32, h: u32, rgb: &[u8]| -> Result<Vec<u8>, String> {
        let tile = RasterRgb::new(w, h, rgb.to_vec()).map_err(|e| e.to_string())?;
        Ok(match kind {
            Kind::Segment => heuristic_segment(&tile, &params).into_plane().into_data(),
            Kind::Clean => fill_clean(&tile, &rules).into_bytes(),
        })
    };
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    match serve(&mut input, &mut output, &handler) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wsitile-sidecar: {e}");
            ExitCode::FAILURE
        }
    }
}
