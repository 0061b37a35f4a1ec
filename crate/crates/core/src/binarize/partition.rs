use crate::error::{Error, Result};

/// Disjoint groups of flat indices covering one parameter tensor.
///
/// Each group is transformed independently; the mean subtraction couples only
/// weights within the same group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    len: usize,
    groups: Vec<Vec<usize>>,
    degenerate: Vec<usize>,
}

impl PartitionSpec {
    /// Validates that `groups` are disjoint and cover `0..len` exactly once.
    /// Groups with fewer than two members are accepted but recorded as
    /// degenerate.
    pub fn new(len: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; len];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::invalid(format!("partition group {g} is empty")));
            }
            for &i in group {
                if i >= len {
                    return Err(Error::invalid(format!(
                        "partition group {g} holds index {i} outside 0..{len}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!(
                        "index {i} appears in more than one partition group"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "partition does not cover index {missing}"
            )));
        }
        let degenerate: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.len() < 2)
            .map(|(i, _)| i)
            .collect();
        if !degenerate.is_empty() {
            log::warn!(
                "{} of {} partition groups have fewer than two members; their gradient is zero",
                degenerate.len(),
                groups.len()
            );
        }
        Ok(PartitionSpec {
            len,
            groups,
            degenerate,
        })
    }

    /// One group per output neuron of a dense weight laid out `[In, Out]`:
    /// group `j` holds the `In` indices `i * Out + j`.
    pub fn per_neuron(weight_shape: &[usize]) -> Result<Self> {
        let &[fan_in, out] = weight_shape else {
            return Err(Error::dim(format!(
                "per-neuron partition needs an [In, Out] shape, got {weight_shape:?}"
            )));
        };
        Self::strided_columns(fan_in, out)
    }

    /// One group per output filter of a kernel laid out `[kH, kW, Cin, Cout]`:
    /// group `j` holds every index whose last coordinate is `j`.
    pub fn per_filter(weight_shape: &[usize]) -> Result<Self> {
        let &[kh, kw, cin, cout] = weight_shape else {
            return Err(Error::dim(format!(
                "per-filter partition needs a [kH, kW, Cin, Cout] shape, got {weight_shape:?}"
            )));
        };
        Self::strided_columns(kh * kw * cin, cout)
    }

    /// A single group over all `len` indices.
    pub fn single(len: usize) -> Result<Self> {
        Self::new(len, vec![(0..len).collect()])
    }

    fn strided_columns(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("partition over an empty weight"));
        }
        let groups = (0..cols)
            .map(|j| (0..rows).map(|r| r * cols + j).collect())
            .collect();
        Self::new(rows * cols, groups)
    }

    /// Number of indices covered.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Indices of groups with fewer than two members.
    pub fn degenerate_groups(&self) -> &[usize] {
        &self.degenerate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_neuron_small() {
        let p = PartitionSpec::per_neuron(&[3, 2]).unwrap();
        // (i, j) -> i * 2 + j
        assert_eq!(p.groups(), &[vec![0, 2, 4], vec![1, 3, 5]]);
        assert!(p.degenerate_groups().is_empty());
    }

    #[test]
    fn per_neuron_counts() {
        let p = PartitionSpec::per_neuron(&[784, 10]).unwrap();
        assert_eq!(p.num_groups(), 10);
        assert!(p.groups().iter().all(|g| g.len() == 784));
    }

    #[test]
    fn per_neuron_singletons_flagged() {
        let p = PartitionSpec::per_neuron(&[1, 4]).unwrap();
        assert_eq!(p.num_groups(), 4);
        assert!(p.groups().iter().all(|g| g.len() == 1));
        assert_eq!(p.degenerate_groups(), &[0, 1, 2, 3]);
    }

    #[test]
    fn per_filter_counts() {
        let p = PartitionSpec::per_filter(&[3, 3, 1, 2]).unwrap();
        assert_eq!(p.num_groups(), 2);
        assert!(p.groups().iter().all(|g| g.len() == 9));
        let p = PartitionSpec::per_filter(&[5, 5, 6, 16]).unwrap();
        assert_eq!(p.num_groups(), 16);
        assert!(p.groups().iter().all(|g| g.len() == 150));
        // Every member of filter j has last coordinate j.
        for (j, g) in p.groups().iter().enumerate() {
            assert!(g.iter().all(|i| i % 16 == j));
        }
    }

    #[test]
    fn per_filter_singletons_flagged() {
        let p = PartitionSpec::per_filter(&[1, 1, 1, 8]).unwrap();
        assert_eq!(p.degenerate_groups().len(), 8);
    }

    #[test]
    fn wrong_rank() {
        assert!(PartitionSpec::per_neuron(&[2, 2, 2]).is_err());
        assert!(PartitionSpec::per_filter(&[3, 3]).is_err());
    }

    #[test]
    fn rejects_overlap_and_gaps() {
        assert!(PartitionSpec::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(PartitionSpec::new(3, vec![vec![0, 1]]).is_err());
        assert!(PartitionSpec::new(3, vec![vec![0, 1], vec![2, 3]]).is_err());
    }
}
