use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{AnnotationSet, ClassId, CollapseMapping, Error, Result};

/// An unordered class pair and how often it was confused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub a: ClassId,
    pub b: ClassId,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    #[serde(with = "pair_list")]
    pub counts: BTreeMap<(ClassId, ClassId), u64>,
    pub total_confusions: u64,
    pub total_mistakes: u64,
}

impl ConfusionTable {
    pub fn count(&self, a: ClassId, b: ClassId) -> u64 {
        self.counts.get(&ordered(a, b)).copied().unwrap_or(0)
    }

    /// Pairs by descending count, then ascending classes.
    pub fn ranked(&self) -> Vec<ConfusionPair> {
        let mut pairs: Vec<ConfusionPair> = self
            .counts
            .iter()
            .map(|(&(a, b), &count)| ConfusionPair { a, b, count })
            .collect();
        pairs.sort_by(|x, y| y.count.cmp(&x.count).then((x.a, x.b).cmp(&(y.a, y.b))));
        pairs
    }
}

fn ordered(a: ClassId, b: ClassId) -> (ClassId, ClassId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Counts, for each mistake, one confusion with every class of the expanded
/// correct set other than the prediction.
///
/// A row whose prediction is credited by the correct set is not a mistake
/// and is rejected.
pub fn confusion_pairs(
    mistakes: &[(String, ClassId)],
    anns: &AnnotationSet,
    mapping: &CollapseMapping,
) -> Result<ConfusionTable> {
    let mut table = ConfusionTable::default();
    for (image_id, predicted) in mistakes {
        let record = anns
            .get(image_id)
            .ok_or_else(|| Error::UnknownImage(image_id.clone()))?;
        let truth = mapping.expand(&record.correct);
        if truth.contains(predicted) {
            return Err(Error::InvalidArgument(format!(
                "prediction {predicted} on {image_id:?} is correct, not a mistake"
            )));
        }
        table.total_mistakes += 1;
        for &label in &truth {
            *table.counts.entry(ordered(*predicted, label)).or_default() += 1;
            table.total_confusions += 1;
        }
    }
    Ok(table)
}

mod pair_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ConfusionPair;
    use crate::ClassId;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(ClassId, ClassId), u64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let list: Vec<ConfusionPair> = map
            .iter()
            .map(|(&(a, b), &count)| ConfusionPair { a, b, count })
            .collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(ClassId, ClassId), u64>, D::Error> {
        let list = Vec::<ConfusionPair>::deserialize(d)?;
        Ok(list
            .into_iter()
            .map(|p| (super::ordered(p.a, p.b), p.count))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{labels, AnnotationRecord};

    #[test]
    fn one_mistake_two_labels() {
        let mut r = AnnotationRecord::new("x");
        r.correct = labels([1, 2]);
        let anns = AnnotationSet::from_records("v1", 10, [r]).unwrap();
        let t = confusion_pairs(&[("x".into(), ClassId(3))], &anns, &CollapseMapping::empty()).unwrap();
        assert_eq!(t.count(ClassId(3), ClassId(1)), 1);
        assert_eq!(t.count(ClassId(2), ClassId(3)), 1);
        assert_eq!((t.total_confusions, t.total_mistakes), (2, 1));

        assert!(confusion_pairs(&[("x".into(), ClassId(1))], &anns, &CollapseMapping::empty()).is_err());
        assert!(confusion_pairs(&[("y".into(), ClassId(1))], &anns, &CollapseMapping::empty()).is_err());

        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<ConfusionTable>(&json).unwrap(), t);
    }
}
