//! Sagittal mirroring with left/right label exchange.
//!
//! Mirroring a scan about the sagittal midplane turns left-sided anatomy
//! into right-sided anatomy, so paired structures must swap ids for the
//! labels to stay anatomically truthful.  The swap table lists those pairs;
//! unpaired (midline) structures keep their id.

use crate::error::{Error, Result};
use crate::volume::{check_same_grid, LabelVolume, ScalarVolume, SwapTable};

/// Mirror a scan/label pair along the first (x) axis and exchange paired
/// label ids.  Applying the operation twice restores the input exactly.
pub fn sagittal_flip_relabel(
    scan: &ScalarVolume,
    labels: &LabelVolume,
    table: &SwapTable,
) -> Result<(ScalarVolume, LabelVolume)> {
    check_same_grid(
        "sagittal_flip_relabel",
        scan.dims,
        scan.spacing_mm,
        labels.dims,
        labels.spacing_mm,
    )?;

    // Precompute the relabel map once; reject tables that would push a class
    // id out of this volume's range.
    let nc = labels.num_classes;
    let mut lut = vec![0u16; nc as usize];
    for c in 0..nc {
        let m = table.apply(c);
        if m >= nc {
            return Err(Error::InvalidArgument(format!(
                "swap table maps label {c} to {m}, outside num_classes {nc}"
            )));
        }
        lut[c as usize] = m;
    }

    let dims = scan.dims;
    let mut out_scan = vec![0.0f32; scan.num_voxels()];
    let mut out_labels = vec![0u16; labels.num_voxels()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let src = (dims[0] - 1 - x) + dims[0] * (y + dims[1] * z);
                let dst = x + dims[0] * (y + dims[1] * z);
                out_scan[dst] = scan.data()[src];
                out_labels[dst] = lut[labels.data()[src] as usize];
            }
        }
    }
    Ok((
        ScalarVolume::new(dims, scan.spacing_mm, out_scan)?,
        LabelVolume::new(dims, labels.spacing_mm, nc, out_labels)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_voxel_moves_to_mirror_position_with_swapped_id() {
        // One voxel of a left-sided class: after the flip it sits at the
        // mirrored x index and carries the paired right-sided id.
        let dims = [5, 3, 3];
        let mut lab = vec![0u16; 45];
        lab[1 + 5 * (1 + 3 * 1)] = 45;
        let labels = LabelVolume::new(dims, [1.0; 3], 50, lab).unwrap();
        let scan = ScalarVolume::filled(dims, [1.0; 3], 0.0).unwrap();
        let table = SwapTable::new(vec![(45, 46)]).unwrap();

        let (_, flipped) = sagittal_flip_relabel(&scan, &labels, &table).unwrap();
        assert_eq!(flipped.get(3, 1, 1), 46);
        assert_eq!(flipped.data().iter().filter(|&&v| v != 0).count(), 1);
    }

    #[test]
    fn unpaired_labels_keep_their_id() {
        let dims = [4, 1, 1];
        let labels = LabelVolume::new(dims, [1.0; 3], 10, vec![7, 0, 0, 0]).unwrap();
        let scan = ScalarVolume::new(dims, [1.0; 3], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let table = SwapTable::new(vec![(1, 2)]).unwrap();
        let (s, l) = sagittal_flip_relabel(&scan, &labels, &table).unwrap();
        assert_eq!(s.data(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(l.data(), &[0, 0, 0, 7]);
    }

    #[test]
    fn out_of_range_swap_target_is_rejected() {
        let dims = [2, 1, 1];
        let labels = LabelVolume::new(dims, [1.0; 3], 4, vec![1, 0]).unwrap();
        let scan = ScalarVolume::filled(dims, [1.0; 3], 0.0).unwrap();
        let table = SwapTable::new(vec![(1, 9)]).unwrap();
        assert!(sagittal_flip_relabel(&scan, &labels, &table).is_err());
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(
            scan_data in proptest::collection::vec(-1000.0f32..2000.0, 24),
            label_data in proptest::collection::vec(0u16..6, 24),
        ) {
            let dims = [4, 3, 2];
            let scan = ScalarVolume::new(dims, [1.0, 2.0, 3.0], scan_data).unwrap();
            let labels = LabelVolume::new(dims, [1.0, 2.0, 3.0], 6, label_data).unwrap();
            let table = SwapTable::new(vec![(1, 2), (3, 5)]).unwrap();

            let (s1, l1) = sagittal_flip_relabel(&scan, &labels, &table).unwrap();
            let (s2, l2) = sagittal_flip_relabel(&s1, &l1, &table).unwrap();
            for (a, b) in s2.data().iter().zip(scan.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(l2.data(), labels.data());
        }
    }
}
